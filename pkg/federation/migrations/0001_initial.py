from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('name', models.CharField(max_length=100)),
                ('strategy', models.CharField(choices=[('fedavg', 'FedAvg'), ('plain_mean', 'Plain mean'), ('simagg', 'SimAgg'), ('regsimagg', 'RegSimAgg')], max_length=20)),
                ('status', models.CharField(choices=[('RUNNING', 'Running'), ('COMPLETED', 'Completed'), ('FAILED', 'Failed')], default='RUNNING', max_length=10)),
                ('config', models.JSONField(default=dict)),
                ('output_dir', models.CharField(max_length=500)),
                ('master_seed', models.PositiveBigIntegerField(default=0)),
                ('rounds_completed', models.PositiveIntegerField(default=0)),
                ('final_val_loss', models.FloatField(blank=True, null=True)),
                ('auc', models.FloatField(blank=True, null=True)),
                ('comm_cost', models.FloatField(blank=True, null=True)),
                ('error', models.TextField(blank=True)),
                ('started_at', models.DateTimeField(auto_now_add=True)),
                ('finished_at', models.DateTimeField(blank=True, null=True)),
            ],
            options={
                'ordering': ['-started_at', '-id'],
            },
        ),
    ]
